fn main() {
    std::process::exit(trialsem::cli::run(std::env::args_os()));
}
