fn main() {
    snip::cli::tune_allocator();
    std::process::exit(snip::cli::run(std::env::args_os()));
}
