fn main() {
    std::process::exit(densefilter_cli::run(std::env::args_os()));
}
