fn main() {
    std::process::exit(mian::cli::run(std::env::args_os()));
}
