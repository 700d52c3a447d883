def run():
    """Run the job."""
    return 9


# kick off
run()
