import pytest

from melstyle import version


def test_installed_dependencies_are_recent_enough():
    version._check_module_dependencies()


def test_old_module_is_rejected():
    with pytest.raises(ImportError, match='at least 999.0'):
        version._import_module_with_version_check('numpy', '999.0')


def test_missing_module_names_install_info():
    with pytest.raises(ImportError) as excinfo:
        version._import_module_with_version_check(
            'melstyle_no_such_module', '1.0', install_info='see README')
    assert 'see README' in str(excinfo.value.args)
