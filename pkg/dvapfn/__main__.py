from dvapfn.main import main

main()
