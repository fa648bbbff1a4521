"""
徑向函數演算包 - 截斷、剖面、符號類半範數與加權範數
"""
