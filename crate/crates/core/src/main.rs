fn main() {
    std::process::exit(wban_lwaa::cli::run(std::env::args_os()));
}
