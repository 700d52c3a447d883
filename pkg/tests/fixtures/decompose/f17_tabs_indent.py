def tabbed():
	"""
	Indented with tabs throughout.
	"""
	return "\t".join(["a", "b"])


def spaced():
    return "ok"


print(tabbed(), spaced())
