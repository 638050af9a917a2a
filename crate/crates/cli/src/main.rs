fn main() {
    std::process::exit(wdp_cli::run(std::env::args_os()));
}
