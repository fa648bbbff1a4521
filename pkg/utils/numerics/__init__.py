"""
數值工具包 - 網格、差分模板與求積
"""
