fn main() {
    std::process::exit(late_mvs::cli::run(std::env::args_os()));
}
