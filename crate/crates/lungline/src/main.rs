fn main() {
    std::process::exit(lungline::cli::run(std::env::args_os().skip(1)));
}
