fn main() {
    std::process::exit(segnet::cli::run(std::env::args_os()));
}
