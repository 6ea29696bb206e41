# *- encoding: utf-8 -*-
"""
melstyle version, required package versions, and utilities for checking
"""
# License: simplified BSD

# PEP0440 compatible formatted version, see:
# https://www.python.org/dev/peps/pep-0440/
#
# Dev branch marker is: 'X.Y.dev' or 'X.Y.devN' where N is an integer.
#
__version__ = '0.1.0a'

_MELSTYLE_INSTALL_MSG = 'See %s for installation information.' % (
    'the README file')

# This is a tuple to preserve order, so that dependencies are checked
#   in some meaningful order (more => less 'core').
REQUIRED_MODULE_METADATA = (
    ('numpy', {
        'min_version': '1.20',
        'required_at_installation': True,
        'install_info': _MELSTYLE_INSTALL_MSG}),
    ('scipy', {
        'min_version': '1.7',
        'required_at_installation': True,
        'install_info': _MELSTYLE_INSTALL_MSG}),
    ('sklearn', {
        'pypi_name': 'scikit-learn',
        'required_at_installation': True,
        'min_version': '0.22',
        'install_info': _MELSTYLE_INSTALL_MSG}),
    ('joblib', {
        'min_version': '0.14',
        'required_at_installation': True,
        'install_info': _MELSTYLE_INSTALL_MSG}),
    ('pandas', {
        'min_version': '1.0',
        'required_at_installation': True,
        'install_info': _MELSTYLE_INSTALL_MSG}),
    ('matplotlib', {
        'min_version': '3.1',
        'required_at_installation': True,
        'install_info': _MELSTYLE_INSTALL_MSG}),
    ('packaging', {
        'min_version': '20.0',
        'required_at_installation': True,
        'install_info': _MELSTYLE_INSTALL_MSG}),
)


def _import_module_with_version_check(
        module_name,
        minimum_version,
        install_info=None):
    """Check that module is installed with a recent enough version
    """
    from packaging.version import Version

    try:
        module = __import__(module_name)
    except ImportError as exc:
        user_friendly_info = ('Module "{0}" could not be found. {1}').format(
            module_name,
            install_info or 'Please install it properly to use melstyle.')
        exc.args += (user_friendly_info,)
        if hasattr(exc, 'msg'):
            exc.msg += '. ' + user_friendly_info
        raise

    # Avoid choking on modules with no __version__ attribute
    module_version = getattr(module, '__version__', '0.0.0')

    version_too_old = Version(module_version) < Version(minimum_version)

    if version_too_old:
        message = (
            'A {module_name} version of at least {minimum_version} '
            'is required to use melstyle. {module_version} was found. '
            'Please upgrade {module_name}').format(
                module_name=module_name,
                minimum_version=minimum_version,
                module_version=module_version)

        raise ImportError(message)

    return module


def _check_module_dependencies(is_melstyle_installing=False):
    """Throw an exception if melstyle dependencies are not installed.

    Parameters
    ----------
    is_melstyle_installing: boolean
        if True, only error on missing packages that cannot be auto-installed.
        if False, error on any missing package.

    Throws
    -------
    ImportError
    """

    for (module_name, module_metadata) in REQUIRED_MODULE_METADATA:
        if not (is_melstyle_installing and
                not module_metadata['required_at_installation']):
            _import_module_with_version_check(
                module_name=module_name,
                minimum_version=module_metadata['min_version'],
                install_info=module_metadata.get('install_info'))
