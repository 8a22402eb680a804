# Subcommand groups
