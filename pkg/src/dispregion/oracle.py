def __getattr__(name):  # placeholder during bootstrap
    raise NotImplementedError(name)
