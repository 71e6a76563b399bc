from . import ablate, report, run, sample_demo

COMMANDS = (sample_demo, run, ablate, report)
