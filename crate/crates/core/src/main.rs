fn main() {
    std::process::exit(adaframe::harness::cli_main(std::env::args_os()));
}
