fn main() {
    std::process::exit(bilu::cli::run_benchmark(std::env::args_os()));
}
