# Numerical core: index sets, series, face solvers, quasimode driver, oracle, subcommands
