from trajood.cli import main

main()
