fn main() {
    std::process::exit(netswitch::cli::run(std::env::args_os()));
}
