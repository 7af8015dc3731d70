fn main() {
    std::process::exit(leakwatch::runtime::cli::main_with_args(std::env::args_os()));
}
