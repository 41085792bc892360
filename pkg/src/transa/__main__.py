from transa.cli import entry

entry()
