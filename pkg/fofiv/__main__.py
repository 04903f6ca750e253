from fofiv.cli import main

main()
