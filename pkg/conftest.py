from fw_merging import utils


# The plugin is registered by its entry point once the distribution is installed
if not utils.is_package_installed("fw-merging"):
    pytest_plugins = ["fw_merging.plugin", "pytester"]
else:
    pytest_plugins = ["pytester"]
