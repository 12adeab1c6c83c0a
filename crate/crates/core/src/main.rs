fn main() {
    std::process::exit(tripchain::cli::main_with_args(std::env::args_os()));
}
