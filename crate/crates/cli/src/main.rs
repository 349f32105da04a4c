fn main() {
    std::process::exit(comal_cli::main_with_args(std::env::args_os()));
}
