fn main() {
    std::process::exit(selfavg::cli::main_with_args(std::env::args_os()));
}
