fn main() {
    std::process::exit(vqaret_cli::main_with_args(std::env::args_os()));
}
