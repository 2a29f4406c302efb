from fsmguard.cli import main

main()
