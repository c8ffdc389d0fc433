fn main() {
    std::process::exit(rfsphase::cli::run(std::env::args_os()));
}
