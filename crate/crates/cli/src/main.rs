fn main() {
    std::process::exit(d3po_cli::run(std::env::args_os()));
}
