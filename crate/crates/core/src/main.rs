fn main() {
    let code = vad_core::cli::run(
        std::env::args_os(),
        std::env::vars().collect(),
        &mut std::io::stdout(),
        &mut std::io::stderr(),
    );
    std::process::exit(code);
}
