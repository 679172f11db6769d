fn main() {
    std::process::exit(structguard::cli::main_with_args(std::env::args_os()));
}
