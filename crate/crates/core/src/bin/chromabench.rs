fn main() {
    std::process::exit(chromabench::cli::run(std::env::args_os()));
}
