"""execshim: the executor at the SUT boundary.

Speaks the frame protocol on stdin/stdout, runs each test in fresh child
interpreters on the eager and compiled backends, and reports outputs,
exceptions, and line coverage. Ships the hermetic `toyfw` test double.
"""

__version__ = "0.1.0"
