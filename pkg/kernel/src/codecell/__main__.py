from codecell.worker import main

main()
