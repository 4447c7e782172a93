fn main() {
    std::process::exit(spconf::cli::main_with_args(std::env::args_os()));
}
