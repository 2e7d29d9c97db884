fn main() {
    std::process::exit(riot::cli::main_with_args(std::env::args_os()));
}
