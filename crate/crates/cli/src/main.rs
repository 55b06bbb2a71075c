fn main() {
    std::process::exit(stereogc_cli::cli::main_with_args(std::env::args_os()));
}
