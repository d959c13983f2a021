"""
Authentication dependency for the HTTP API.
"""

from typing import Optional

from fastapi import Depends, HTTPException
from fastapi.security import HTTPAuthorizationCredentials, HTTPBearer

from app.config import settings

# Security scheme; missing headers are handled below so an unset key means open access
security = HTTPBearer(auto_error=False)


async def authenticate_api_key(
    authorization: Optional[HTTPAuthorizationCredentials] = Depends(security),
) -> bool:
    """Require ``Authorization: Bearer <HQP_INTERNAL_API_KEY>`` when a key is configured"""
    expected_key = settings.internal_api_key
    if not expected_key:
        return True

    if authorization is None:
        raise HTTPException(status_code=401, detail="API key required")

    if authorization.credentials != expected_key:
        raise HTTPException(status_code=401, detail="Invalid API key")

    return True
