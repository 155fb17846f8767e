fn main() {
    std::process::exit(berrystack::cli::run(std::env::args_os()));
}
