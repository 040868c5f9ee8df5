from src.commands import evaluation, performance, recurrence, reporting, stages, synthetic, training

# Subcommands appear in --help in this order.
COMMANDS = [stages, recurrence, performance, training, evaluation, synthetic, reporting]
