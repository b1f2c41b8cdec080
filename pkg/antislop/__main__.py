from antislop.cli import run

run()
