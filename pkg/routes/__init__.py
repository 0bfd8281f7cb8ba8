# CLI subcommands for hazard-dantzig