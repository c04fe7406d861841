fn main() {
    std::process::exit(qkcv::harness::cli::run_cli(std::env::args_os()));
}
