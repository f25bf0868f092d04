"""Learning agent for the task-assignment wire protocol.

Everything the agent knows about the world arrives as observation payloads
over a socket; it never loads instance files or touches simulator internals.
"""
