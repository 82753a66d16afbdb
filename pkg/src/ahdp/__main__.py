from ahdp.cli import main

main()
