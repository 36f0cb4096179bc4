"""StimLab Application Package"""

__version__ = "1.0.0"
__author__ = "StimLab Team"
__description__ = "Simulator and analysis toolkit for low- and kilohertz-frequency nerve stimulation fatigue studies"
