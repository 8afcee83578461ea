use clap::error::ErrorKind;
use clap::Parser;
use serde_json::json;

fn fail(err: serde_json::Value, code: i32) -> ! {
    println!("{}", serde_json::to_string_pretty(&err).unwrap_or_default());
    std::process::exit(code);
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match bhscatter_cli::Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) => e.exit(),
        Err(e) => fail(json!({ "error": e.to_string().trim(), "causes": [], "command": null }), 2),
    };
    match bhscatter_cli::run(&cli) {
        Ok(summary) => println!("{}", serde_json::to_string_pretty(&summary).unwrap_or_default()),
        Err(e) => fail(
            json!({
                "error": e.to_string(),
                "causes": e.chain().skip(1).map(|c| c.to_string()).collect::<Vec<_>>(),
                "command": bhscatter_cli::command_name(&cli.command),
            }),
            1,
        ),
    }
}
