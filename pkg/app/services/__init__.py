"""
Services package: simulation, training, artifacts, experiments and reports
"""
