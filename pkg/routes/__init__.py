"""
路由模組包
"""
from routes.base import CommandRouter

# 創建主路由器
cli_router = CommandRouter()

# 導入並包含所有路由
from routes.metric_routes import router as metric_router
from routes.evolution_routes import router as evolution_router
from routes.resolvent_routes import router as resolvent_router
from routes.tail_routes import router as tail_router

# 包含所有路由
cli_router.include_router(metric_router)
cli_router.include_router(evolution_router)
cli_router.include_router(resolvent_router)
cli_router.include_router(tail_router)
