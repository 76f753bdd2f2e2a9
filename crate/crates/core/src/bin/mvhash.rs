fn main() {
    std::process::exit(mvhash::cli::run(std::env::args_os()));
}
