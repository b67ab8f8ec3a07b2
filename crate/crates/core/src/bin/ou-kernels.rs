fn main() {
    let argv: Vec<String> = std::env::args().collect();
    std::process::exit(ou_kernels::cli::run_cli(&argv));
}
