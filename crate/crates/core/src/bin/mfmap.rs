fn main() {
    std::process::exit(mfmap::cli::main_with_args(std::env::args_os().collect()));
}
