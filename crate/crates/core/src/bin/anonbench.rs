fn main() {
    std::process::exit(anonbench::cli::run(std::env::args_os()));
}
