fn main() {
    std::process::exit(objxfer::cli::run(std::env::args_os()));
}
