# codelnet desk-scale experiments
