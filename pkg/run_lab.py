# run_lab.py
"""
Entry point for the FoF-IV laboratory.

Usage:
    python run_lab.py simulate --n 250 --regime constant:1 --beta 0.4666 --scaled --reps 10
    python run_lab.py simulate --reproduce table3 --reps 200 --threads 8 -v
    python run_lab.py graph-stats data/edges/path3.txt
    python run_lab.py diagnose --n 500 --regime constant:1 --beta 0.95
"""
from fofiv.cli import main

if __name__ == "__main__":
    main()
