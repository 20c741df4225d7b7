fn main() {
    std::process::exit(crvq::cli::run(std::env::args_os()));
}
